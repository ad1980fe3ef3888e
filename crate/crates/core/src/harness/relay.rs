//! Relay node actor: reassembles client SMS traffic, runs per-packet
//! consensus with the rest of the committee, maintains the off-chain channel
//! view, and drives the attestation pipelines (channel flush/close, CCBS,
//! CPBS) against the simulated chains.
//!
//! Handlers are pure with respect to shared state: they read the
//! [`WorldView`], mutate only this node, and emit [`Effect`]s.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::ccbs::{self, RequestOutcome, RequestPhase, RequestState};
use crate::contracts::{
    accept_attest_message, batch_digest, callback_attest_message, close_attest_message,
    close_channel_args, final_state_digest, open_channel_args, task_attest_message,
    update_attest_message, update_channel_args, AcceptRecord, ComputeTask, CrossChainRequest,
    OffChainTx, TaskResult,
};
use crate::cpbs::{self, CandidateSets};
use crate::crypto::{
    aggregate, client_verify, relay_sign, relay_verify, Address, AggregateProof, BilinearEngine,
    ClientKeyPair, ClientSignature, RelayKeyPair, RelaySignature,
};
use crate::harness::metrics::{Metric, MetricSample};
use crate::harness::types::{
    AttestCtx, AuditRecord, ClientReply, Effect, RelayMsg, WorldEvent, WorldView, CHANNEL,
    CHANNEL_CONTRACT, COMPUTE_CONTRACT, PROXY_CONTRACT,
};
use crate::ofbs::{BftAction, BftInstance, BftStatus};
use crate::sim::SimTime;
use crate::simchain::{ChainTransaction, EventKind, EventRecord, Subscription};
use crate::sms::{PacketKind, Reassembler, SmsPacket};
use crate::wire::Writer;

/// Missed heartbeats before a peer is treated as dead.
const DEAD_AFTER_TICKS: u64 = 3;

pub fn kind_label(kind: PacketKind) -> &'static str {
    match kind {
        PacketKind::OpenChannel => "OpenChannel",
        PacketKind::OffChainPay => "OffChainPay",
        PacketKind::CloseChannel => "CloseChannel",
        PacketKind::CrossChain => "CrossChain",
        PacketKind::ComputeTask => "ComputeTask",
    }
}

fn attest_message(ctx: &AttestCtx) -> Vec<u8> {
    match ctx {
        AttestCtx::ChannelUpdate { batch } => {
            update_attest_message(CHANNEL, &batch_digest(CHANNEL, batch))
        }
        AttestCtx::ChannelClose { final_state, .. } => {
            close_attest_message(CHANNEL, &final_state_digest(final_state))
        }
        AttestCtx::CcbsAccept { request_bytes, .. } => accept_attest_message(request_bytes),
        AttestCtx::CcbsCallback { result_bytes, .. } => callback_attest_message(result_bytes),
    }
}

/// Contract submission a relay keeps re-driving until the matching on-chain
/// event confirms it landed.
#[derive(Debug, Clone)]
enum Job {
    Open { client: Address, amount: u64 },
    Close,
    CrossQuery { chain: String, request_bytes: Vec<u8> },
    SubmitTask { task_bytes: Vec<u8> },
}

struct PendingAttest<E: BilinearEngine> {
    ctx: AttestCtx,
    message: Vec<u8>,
    sigs: BTreeMap<usize, RelaySignature<E>>,
    submitted: bool,
}

struct PacketMeta {
    kind: PacketKind,
    client: Address,
    /// Index of the relay the client addressed; that relay owns replies and
    /// per-packet metrics.
    mobile: usize,
    received_at: SimTime,
    consensus_started_at: SimTime,
}

struct TaskState<E: BilinearEngine> {
    task: ComputeTask,
    epoch: u64,
    started_epoch_at: SimTime,
    sets: CandidateSets<E>,
    /// My computed payload, resent on leader change.
    my_payload: Option<Vec<u8>>,
    submitted: bool,
    done: bool,
}

pub struct RelayNode<E: BilinearEngine> {
    pub id: usize,
    n: usize,
    quorum: usize,
    keypair: RelayKeyPair<E>,
    /// ed25519 identity for leader-signed CCBS broadcasts.
    pub sign_key: ClientKeyPair,
    pub crashed: bool,
    byzantine_compute: bool,
    busy_until: SimTime,
    rng: ChaCha20Rng,

    reassembler: Reassembler,
    delivered_uuids: BTreeSet<u64>,
    packet_meta: BTreeMap<u64, PacketMeta>,
    /// Replies already produced; duplicates of a finished uuid get these
    /// resent instead of re-entering the pipeline.
    completed_replies: BTreeMap<u64, ClientReply>,
    /// Uuids whose reply is still pending an on-chain or committee outcome.
    my_received: BTreeSet<u64>,

    bft: BTreeMap<u64, BftInstance>,
    bft_decided: BTreeSet<u64>,

    // Alg. 2 worker state.
    wakeup: SimTime,
    queue: Vec<OffChainTx>,
    db: BTreeMap<(Address, u64), OffChainTx>,
    view_escrow: BTreeMap<Address, u64>,
    view_nonces: BTreeMap<Address, u64>,
    channel_open: bool,
    closing: bool,

    pending_jobs: BTreeMap<u64, (Job, SimTime)>,
    pending_attests: BTreeMap<[u8; 32], PendingAttest<E>>,

    requests: BTreeMap<u64, RequestState<E>>,
    /// Ready cross_accept / cross_callback args per request, reused by
    /// re-drives without a fresh signature round.
    accept_args: BTreeMap<u64, Vec<u8>>,
    callback_args: BTreeMap<u64, Vec<u8>>,

    tasks: BTreeMap<u64, TaskState<E>>,

    subs: Vec<Subscription>,
    last_heartbeat: Vec<SimTime>,
}

impl<E: BilinearEngine> RelayNode<E> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        n: usize,
        quorum: usize,
        keypair: RelayKeyPair<E>,
        sign_key: ClientKeyPair,
        byzantine_compute: bool,
        rng: ChaCha20Rng,
        chain_ids: &[String],
        home_chain: &str,
    ) -> Self {
        let mut subs = Vec::new();
        subs.push(Subscription::new(home_chain, CHANNEL_CONTRACT, None));
        subs.push(Subscription::new(home_chain, COMPUTE_CONTRACT, None));
        for chain in chain_ids {
            subs.push(Subscription::new(chain, PROXY_CONTRACT, None));
        }
        Self {
            id,
            n,
            quorum,
            keypair,
            sign_key,
            crashed: false,
            byzantine_compute,
            busy_until: 0,
            rng,
            reassembler: Reassembler::new(),
            delivered_uuids: BTreeSet::new(),
            packet_meta: BTreeMap::new(),
            completed_replies: BTreeMap::new(),
            my_received: BTreeSet::new(),
            bft: BTreeMap::new(),
            bft_decided: BTreeSet::new(),
            wakeup: 0,
            queue: Vec::new(),
            db: BTreeMap::new(),
            view_escrow: BTreeMap::new(),
            view_nonces: BTreeMap::new(),
            channel_open: false,
            closing: false,
            pending_jobs: BTreeMap::new(),
            pending_attests: BTreeMap::new(),
            requests: BTreeMap::new(),
            accept_args: BTreeMap::new(),
            callback_args: BTreeMap::new(),
            tasks: BTreeMap::new(),
            subs,
            last_heartbeat: vec![0; n],
        }
    }

    pub fn escrow_view(&self) -> &BTreeMap<Address, u64> {
        &self.view_escrow
    }

    pub fn nonces_view(&self) -> &BTreeMap<Address, u64> {
        &self.view_nonces
    }

    pub fn channel_open(&self) -> bool {
        self.channel_open
    }

    /// Nothing left that this node is responsible for driving.
    pub fn is_quiet(&self) -> bool {
        self.pending_jobs.is_empty()
            && self.requests.values().all(|r| r.outcome.is_some())
            && self.tasks.values().all(|t| t.done)
            && self.pending_attests.values().all(|p| p.submitted)
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn request_outcome(&self, req_id: u64) -> Option<RequestOutcome> {
        self.requests.get(&req_id).and_then(|r| r.outcome)
    }

    fn busy(&mut self, now: SimTime, cost: u64) -> SimTime {
        let start = now.max(self.busy_until);
        self.busy_until = start + cost;
        self.busy_until
    }

    fn alive(&self, peer: usize, now: SimTime, view: &WorldView<'_, E>) -> bool {
        if peer == self.id {
            return !self.crashed;
        }
        let horizon = DEAD_AFTER_TICKS * view.scenario.committee.tick_ms + 1;
        now.saturating_sub(self.last_heartbeat[peer]) <= horizon
    }

    /// Lowest-index relay this node currently believes is live; that node
    /// owns flushes and contract submissions.
    fn ofbs_leader(&self, now: SimTime, view: &WorldView<'_, E>) -> usize {
        (0..self.n).find(|&i| self.alive(i, now, view)).unwrap_or(self.id)
    }

    fn is_ofbs_leader(&self, now: SimTime, view: &WorldView<'_, E>) -> bool {
        self.ofbs_leader(now, view) == self.id
    }

    fn broadcast(
        &self,
        done: SimTime,
        link_ms: u64,
        msg: &RelayMsg<E>,
        out: &mut Vec<Effect<E>>,
    ) {
        for peer in 0..self.n {
            if peer != self.id {
                out.push(Effect::At(
                    done + link_ms,
                    WorldEvent::RelayDeliver { to: peer, from: self.id, msg: msg.clone() },
                ));
            }
        }
    }

    fn send_to(
        &self,
        done: SimTime,
        link_ms: u64,
        peer: usize,
        msg: RelayMsg<E>,
        out: &mut Vec<Effect<E>>,
    ) {
        if peer == self.id {
            return;
        }
        out.push(Effect::At(
            done + link_ms,
            WorldEvent::RelayDeliver { to: peer, from: self.id, msg },
        ));
    }

    /// SMS reply back to a client: one latency + serialization delay and a
    /// loss draw; lost replies are recovered by the client's uuid retry.
    fn send_reply(
        &mut self,
        done: SimTime,
        view: &WorldView<'_, E>,
        reply: ClientReply,
        out: &mut Vec<Effect<E>>,
    ) {
        self.completed_replies.insert(reply.uuid, reply.clone());
        let Some(meta) = self.packet_meta.get(&reply.uuid) else {
            return;
        };
        let Some(&client) = view.client_index.get(&meta.client) else {
            return;
        };
        use rand::Rng;
        let draw = self.rng.next_u64() as f64 / u64::MAX as f64 * 100.0;
        if draw < view.profile.loss_percent {
            out.push(Effect::Counter("reply_lost"));
            return;
        }
        let wire = 40 + reply.body.len();
        let at = done + view.profile.latency_ms + view.profile.transmit_ms(wire);
        out.push(Effect::At(at, WorldEvent::ClientDeliver { client, reply }));
    }

    /// Record a finished reply at every relay; only the packet's mobile
    /// relay actually transmits it.
    fn finish_uuid(
        &mut self,
        done: SimTime,
        view: &WorldView<'_, E>,
        uuid: u64,
        ok: bool,
        body: &str,
        out: &mut Vec<Effect<E>>,
    ) {
        let reply = ClientReply { uuid, ok, body: body.to_string() };
        let should_send = self.my_received.contains(&uuid)
            || self
                .packet_meta
                .get(&uuid)
                .is_some_and(|m| m.mobile == self.id);
        if should_send {
            self.send_reply(done, view, reply, out);
        } else {
            self.completed_replies.insert(uuid, reply);
        }
    }

    pub fn handle(
        &mut self,
        now: SimTime,
        event: WorldEvent<E>,
        view: &WorldView<'_, E>,
    ) -> Vec<Effect<E>> {
        if self.crashed {
            return Vec::new();
        }
        let mut out = Vec::new();
        match event {
            WorldEvent::CrashRelay { .. } => {
                self.crashed = true;
                out.push(Effect::Log(format!("relay {} crashed at {now}", self.id)));
            }
            WorldEvent::SegmentArrive { segment, .. } => {
                self.on_segment(now, segment, view, &mut out);
            }
            WorldEvent::RelayDeliver { from, msg, .. } => {
                self.on_relay_msg(now, from, msg, view, &mut out);
            }
            WorldEvent::RelayTick { .. } => {
                self.on_tick(now, view, &mut out);
            }
            _ => {}
        }
        out
    }

    fn on_segment(
        &mut self,
        now: SimTime,
        segment: crate::sms::SmsSegment,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let proc = view.scenario.committee.proc_ms;
        let done = self.busy(now, proc);
        let uuid = segment.uuid;
        let first = segment.seq_no == 0;
        if self.delivered_uuids.contains(&uuid) {
            // Client retry of a packet this relay already delivered: resend
            // the reply if the outcome is known, otherwise wait for it.
            if first {
                self.my_received.insert(uuid);
                if let Some(reply) = self.completed_replies.get(&uuid).cloned() {
                    self.send_reply(done, view, reply, out);
                }
            }
            return;
        }
        let Some(bytes) = self.reassembler.offer(segment) else {
            return;
        };
        self.delivered_uuids.insert(uuid);
        let Ok(packet) = SmsPacket::from_bytes(&bytes) else {
            out.push(Effect::Counter("malformed_packet"));
            return;
        };
        let Some(pk) = view.client_pks.get(&packet.sender_address) else {
            out.push(Effect::Counter("unknown_sender"));
            return;
        };
        if !client_verify(pk, &packet.content.canonical_bytes(), &packet.signature) {
            out.push(Effect::Counter("bad_packet_signature"));
            self.my_received.insert(uuid);
            self.finish_uuid(done, view, uuid, false, "bad signature", out);
            return;
        }
        out.push(Effect::Metric(MetricSample {
            metric: Metric::ValidationTime,
            label: kind_label(packet.content.kind).to_string(),
            value_ms: proc,
        }));
        self.my_received.insert(uuid);
        if let Some(reply) = self.completed_replies.get(&uuid).cloned() {
            self.send_reply(done, view, reply, out);
            return;
        }
        // Fan the packet out so every node seeds its consensus instance.
        let msg = RelayMsg::PacketGossip { packet_bytes: bytes.clone(), receiver: self.id };
        self.broadcast(done, view.scenario.committee.link_ms, &msg, out);
        self.on_gossip(now, bytes, view, out);
    }

    fn bft_timeout_at(&self, done: SimTime, view: &WorldView<'_, E>) -> SimTime {
        done + view.scenario.committee.bft_timeout_ms
    }

    fn on_gossip(
        &mut self,
        now: SimTime,
        packet_bytes: Vec<u8>,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let Ok(packet) = SmsPacket::from_bytes(&packet_bytes) else {
            return;
        };
        let uuid = packet.uuid;
        if self.bft_decided.contains(&uuid) {
            return;
        }
        let done = self.busy_until.max(now);
        self.packet_meta.entry(uuid).or_insert_with(|| PacketMeta {
            kind: packet.content.kind,
            client: packet.sender_address.clone(),
            mobile: parse_mobile(&packet.mobile).unwrap_or(0) % self.n,
            received_at: now,
            consensus_started_at: now,
        });
        let started = self.bft.contains_key(&uuid);
        let f = (self.n - 1) / 3;
        let instance = self.bft.entry(uuid).or_insert_with(|| {
            BftInstance::with_leader_offset(self.id, self.n, f, (uuid % self.n as u64) as usize)
        });
        if matches!(instance.status(), BftStatus::Running) && !started {
            let actions = instance.start(packet_bytes);
            let timeout_at = self.bft_timeout_at(done, view);
            out.push(Effect::At(
                timeout_at,
                WorldEvent::RelayDeliver {
                    to: self.id,
                    from: self.id,
                    msg: RelayMsg::BftTimeout { instance: uuid, view: 0 },
                },
            ));
            self.absorb_bft(now, uuid, actions, view, out);
        } else if started {
            // Re-gossip from a retry: give the instance the proposal if it
            // joined leaderless from stray votes.
            let actions = self.bft.get_mut(&uuid).unwrap().start(packet_bytes);
            self.absorb_bft(now, uuid, actions, view, out);
        }
    }

    fn absorb_bft(
        &mut self,
        now: SimTime,
        uuid: u64,
        actions: Vec<BftAction>,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let done = self.busy_until.max(now);
        let link = view.scenario.committee.link_ms;
        for action in actions {
            match action {
                BftAction::Broadcast(msg) => {
                    let wrapped = RelayMsg::Bft { instance: uuid, msg };
                    self.broadcast(done, link, &wrapped, out);
                }
                BftAction::Decided(proposal) => {
                    if self.bft_decided.insert(uuid) {
                        self.on_committed(now, uuid, &proposal, view, out);
                    }
                }
                BftAction::Aborted => {
                    out.push(Effect::Counter("bft_aborted"));
                    self.finish_uuid(done, view, uuid, false, "consensus aborted", out);
                }
            }
        }
    }

    fn on_relay_msg(
        &mut self,
        now: SimTime,
        from: usize,
        msg: RelayMsg<E>,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let proc = view.scenario.committee.proc_ms;
        match msg {
            RelayMsg::Heartbeat => {
                self.last_heartbeat[from] = now;
            }
            RelayMsg::PacketGossip { packet_bytes, .. } => {
                self.busy(now, proc);
                self.on_gossip(now, packet_bytes, view, out);
            }
            RelayMsg::Bft { instance, msg } => {
                self.busy(now, proc);
                if self.bft_decided.contains(&instance) {
                    return;
                }
                let f = (self.n - 1) / 3;
                let id = self.id;
                let n = self.n;
                let inst = self.bft.entry(instance).or_insert_with(|| {
                    BftInstance::with_leader_offset(id, n, f, (instance % n as u64) as usize)
                });
                let actions = inst.handle_message(from, msg);
                self.absorb_bft(now, instance, actions, view, out);
            }
            RelayMsg::BftTimeout { instance, view: timed_view } => {
                let Some(inst) = self.bft.get_mut(&instance) else {
                    return;
                };
                if !matches!(inst.status(), BftStatus::Running) {
                    return;
                }
                if inst.view() > timed_view {
                    return; // view moved on; its own timer is running
                }
                let actions = inst.on_timeout();
                let next_view = inst.view() + 1;
                let done = self.busy_until.max(now);
                let timeout_at = self.bft_timeout_at(done, view);
                out.push(Effect::At(
                    timeout_at,
                    WorldEvent::RelayDeliver {
                        to: self.id,
                        from: self.id,
                        msg: RelayMsg::BftTimeout { instance, view: next_view },
                    },
                ));
                self.absorb_bft(now, instance, actions, view, out);
            }
            RelayMsg::AttestRequest { ctx } => {
                self.busy(now, proc);
                self.on_attest_request(now, from, ctx, view, out);
            }
            RelayMsg::AttestSig { digest, index, sig } => {
                self.busy(now, proc);
                self.on_attest_sig(now, digest, index, sig, view, out);
            }
            RelayMsg::CpbsResult { task_id, index, payload, sig } => {
                self.busy(now, proc);
                self.on_cpbs_result(now, task_id, index, payload, sig, view, out);
            }
        }
    }

    // ---- consensus commit: apply the packet ----

    fn on_committed(
        &mut self,
        now: SimTime,
        uuid: u64,
        packet_bytes: &[u8],
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let Ok(packet) = SmsPacket::from_bytes(packet_bytes) else {
            return;
        };
        let done = self.busy_until.max(now);
        let is_mobile = self
            .packet_meta
            .get(&uuid)
            .is_some_and(|m| m.mobile == self.id);
        if is_mobile {
            let meta = &self.packet_meta[&uuid];
            out.push(Effect::Metric(MetricSample {
                metric: Metric::ConsensusTime,
                label: kind_label(meta.kind).to_string(),
                value_ms: done.saturating_sub(meta.consensus_started_at),
            }));
        }
        match packet.content.kind {
            PacketKind::OffChainPay => {
                self.apply_pay(now, uuid, &packet, is_mobile, view, out);
            }
            PacketKind::OpenChannel => {
                let job = Job::Open {
                    client: packet.sender_address.clone(),
                    amount: packet.content.amount,
                };
                self.pending_jobs.insert(uuid, (job.clone(), 0));
                if self.is_ofbs_leader(now, view) {
                    self.drive_job(now, uuid, view, out);
                }
            }
            PacketKind::CloseChannel => {
                self.closing = true;
                self.pending_jobs.insert(uuid, (Job::Close, 0));
                if self.is_ofbs_leader(now, view) {
                    self.initiate_close(now, uuid, view, out);
                }
            }
            PacketKind::CrossChain => {
                let Ok(request) = CrossChainRequest::from_bytes(&packet.content.data) else {
                    self.finish_uuid(done, view, uuid, false, "malformed request", out);
                    return;
                };
                if request.to.iter().any(|(chain, _)| !view.chains.contains_key(chain)) {
                    out.push(Effect::Audit(AuditRecord::RequestOutcome {
                        req_id: request.req_id,
                        outcome: "Rejected",
                    }));
                    out.push(Effect::Counter("request_rejected"));
                    self.finish_uuid(done, view, uuid, false, "unknown destination", out);
                    return;
                }
                let job = Job::CrossQuery {
                    chain: request.from_chain.clone(),
                    request_bytes: packet.content.data.clone(),
                };
                self.pending_jobs.insert(uuid, (job, 0));
                if self.is_ofbs_leader(now, view) {
                    self.drive_job(now, uuid, view, out);
                }
            }
            PacketKind::ComputeTask => {
                if ComputeTask::from_bytes(&packet.content.data).is_err() {
                    self.finish_uuid(done, view, uuid, false, "malformed task", out);
                    return;
                }
                let job = Job::SubmitTask { task_bytes: packet.content.data.clone() };
                self.pending_jobs.insert(uuid, (job, 0));
                if self.is_ofbs_leader(now, view) {
                    self.drive_job(now, uuid, view, out);
                }
            }
        }
    }

    /// Validation order per the worker loop: signature, then nonce, then
    /// escrow balance.
    fn apply_pay(
        &mut self,
        now: SimTime,
        uuid: u64,
        packet: &SmsPacket,
        is_mobile: bool,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let done = self.busy_until.max(now);
        let payer = packet.sender_address.clone();
        let payee = packet.content.dest_address.clone();
        let amount = packet.content.amount;
        let nonce = packet.content.nonce;
        let tx = OffChainTx {
            payer: payer.clone(),
            payee: payee.clone(),
            amount,
            nonce,
            signature: ClientSignature(packet.content.data.clone()),
        };
        let reject = |reason: &str, this: &mut Self, out: &mut Vec<Effect<E>>| {
            out.push(Effect::Counter("pay_rejected"));
            this.finish_uuid(done, view, uuid, false, reason, out);
        };
        let Some(pk) = view.client_pks.get(&payer) else {
            return reject("unknown payer", self, out);
        };
        let msg = OffChainTx::signing_bytes(CHANNEL, &payer, &payee, amount, nonce);
        if !client_verify(pk, &msg, &tx.signature) {
            return reject("bad signature", self, out);
        }
        let last = self.view_nonces.get(&payer).copied().unwrap_or(0);
        if nonce != last + 1 {
            return reject("bad nonce", self, out);
        }
        if self.closing || !self.channel_open {
            return reject("channel closed", self, out);
        }
        let escrow = self.view_escrow.get(&payer).copied().unwrap_or(0);
        if escrow < amount {
            return reject("insufficient escrow", self, out);
        }
        self.view_escrow.insert(payer.clone(), escrow - amount);
        *self.view_escrow.entry(payee).or_insert(0) += amount;
        self.view_nonces.insert(payer.clone(), nonce);
        self.queue.push(tx.clone());
        self.db.insert((payer, nonce), tx);
        if is_mobile {
            let received = self.packet_meta[&uuid].received_at;
            out.push(Effect::Metric(MetricSample {
                metric: Metric::OffChainService,
                label: "OffChainPay".to_string(),
                value_ms: done.saturating_sub(received),
            }));
        }
        self.finish_uuid(done, view, uuid, true, "ok", out);
    }

    // ---- submissions the OFBS leader drives ----

    fn drive_job(
        &mut self,
        now: SimTime,
        uuid: u64,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let Some((job, last)) = self.pending_jobs.get(&uuid).cloned() else {
            return;
        };
        let _ = last;
        self.pending_jobs.insert(uuid, (job.clone(), now));
        match job {
            Job::Open { client, amount } => {
                out.push(Effect::Submit {
                    chain: view.home_chain.to_string(),
                    tx: ChainTransaction {
                        submitter: client,
                        contract_id: CHANNEL_CONTRACT.to_string(),
                        method: "open_channel".to_string(),
                        args: open_channel_args(CHANNEL, amount),
                        salt: uuid,
                    },
                });
            }
            Job::Close => {
                self.initiate_close(now, uuid, view, out);
            }
            Job::CrossQuery { chain, request_bytes } => {
                out.push(Effect::Submit {
                    chain,
                    tx: ChainTransaction {
                        submitter: format!("relay-{}", self.id),
                        contract_id: PROXY_CONTRACT.to_string(),
                        method: "cross_query".to_string(),
                        args: request_bytes,
                        salt: uuid,
                    },
                });
            }
            Job::SubmitTask { task_bytes } => {
                out.push(Effect::Submit {
                    chain: view.home_chain.to_string(),
                    tx: ChainTransaction {
                        submitter: format!("relay-{}", self.id),
                        contract_id: COMPUTE_CONTRACT.to_string(),
                        method: "submit_task".to_string(),
                        args: task_bytes,
                        salt: uuid,
                    },
                });
            }
        }
    }

    /// Start (or restart) the signature round closing the channel with this
    /// node's current residual and final state.
    fn initiate_close(
        &mut self,
        now: SimTime,
        close_uuid: u64,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        if !self.channel_open || !self.queue.is_empty() {
            return;
        }
        let final_state: Vec<(Address, u64)> =
            self.view_escrow.iter().map(|(a, b)| (a.clone(), *b)).collect();
        let ctx = AttestCtx::ChannelClose {
            residual: self.queue.clone(),
            final_state,
            close_uuid,
        };
        self.initiate_attest(now, ctx, view, out);
    }

    fn initiate_attest(
        &mut self,
        now: SimTime,
        ctx: AttestCtx,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let message = attest_message(&ctx);
        let digest: [u8; 32] = Sha256::digest(&message).into();
        if let Some(pending) = self.pending_attests.get(&digest) {
            if pending.submitted {
                return;
            }
        }
        // Channel rounds carry the whole evolving batch/state, so a changed
        // digest supersedes the old proposal; CCBS rounds are per-request
        // and must not evict each other.
        if matches!(
            ctx,
            AttestCtx::ChannelUpdate { .. } | AttestCtx::ChannelClose { .. }
        ) {
            let family = std::mem::discriminant(&ctx);
            self.pending_attests.retain(|d, p| {
                p.submitted || *d == digest || std::mem::discriminant(&p.ctx) != family
            });
        }
        let my_sig = relay_sign(&self.keypair, &message);
        let entry = self.pending_attests.entry(digest).or_insert_with(|| PendingAttest {
            ctx: ctx.clone(),
            message,
            sigs: BTreeMap::new(),
            submitted: false,
        });
        entry.sigs.insert(self.id, my_sig);
        let done = self.busy_until.max(now);
        let msg = RelayMsg::AttestRequest { ctx };
        self.broadcast(done, view.scenario.committee.link_ms, &msg, out);
        self.try_aggregate(now, digest, view, out);
    }

    /// Validate a leader's request against local state; sign only what this
    /// node can independently confirm.
    fn on_attest_request(
        &mut self,
        now: SimTime,
        from: usize,
        ctx: AttestCtx,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let valid = match &ctx {
            AttestCtx::ChannelUpdate { batch } => {
                !batch.is_empty()
                    && batch.iter().all(|tx| {
                        self.db.get(&(tx.payer.clone(), tx.nonce)).is_some_and(|mine| mine == tx)
                    })
            }
            AttestCtx::ChannelClose { residual, final_state, .. } => {
                let residual_ok = residual.iter().all(|tx| {
                    self.db.get(&(tx.payer.clone(), tx.nonce)).is_some_and(|mine| mine == tx)
                });
                let state: BTreeMap<Address, u64> = final_state.iter().cloned().collect();
                residual_ok && state == self.view_escrow
            }
            AttestCtx::CcbsAccept { request_bytes, leader, leader_sig } => {
                self.valid_ccbs_prepare(
                    ccbs::PHASE_ACCEPT,
                    request_bytes,
                    *leader,
                    leader_sig,
                    view,
                ) && {
                    match CrossChainRequest::from_bytes(request_bytes) {
                        Ok(request) => self
                            .requests
                            .get(&request.req_id)
                            .is_some_and(|state| state.request_bytes == *request_bytes),
                        Err(_) => false,
                    }
                }
            }
            AttestCtx::CcbsCallback { result_bytes, leader, leader_sig } => {
                self.valid_ccbs_prepare(
                    ccbs::PHASE_CALLBACK,
                    result_bytes,
                    *leader,
                    leader_sig,
                    view,
                ) && {
                    match crate::contracts::CrossResult::from_bytes(result_bytes) {
                        Ok(result) => self.requests.get(&result.req_id).is_some_and(|state| {
                            result.legs.iter().all(|leg| {
                                state.accepts_seen.get(&leg.chain_id) == Some(leg)
                            })
                        }),
                        Err(_) => false,
                    }
                }
            }
        };
        if !valid {
            out.push(Effect::Counter("attest_declined"));
            return;
        }
        let message = attest_message(&ctx);
        let digest: [u8; 32] = Sha256::digest(&message).into();
        let sig = relay_sign(&self.keypair, &message);
        let done = self.busy_until.max(now);
        self.send_to(
            done,
            view.scenario.committee.link_ms,
            from,
            RelayMsg::AttestSig { digest, index: self.id, sig },
            out,
        );
    }

    fn valid_ccbs_prepare(
        &self,
        phase: u8,
        payload: &[u8],
        leader: usize,
        leader_sig: &ClientSignature,
        view: &WorldView<'_, E>,
    ) -> bool {
        leader < self.n && ccbs::verify_prepare(&view.relay_pks[leader], phase, payload, leader_sig)
    }

    fn on_attest_sig(
        &mut self,
        now: SimTime,
        digest: [u8; 32],
        index: usize,
        sig: RelaySignature<E>,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let Some(pending) = self.pending_attests.get_mut(&digest) else {
            return;
        };
        if pending.submitted || index >= self.n {
            return;
        }
        if !relay_verify::<E>(&sig, &view.registry.apub[index], &pending.message) {
            out.push(Effect::Counter("forged_attest_sig"));
            return;
        }
        pending.sigs.insert(index, sig);
        self.try_aggregate(now, digest, view, out);
    }

    fn try_aggregate(
        &mut self,
        now: SimTime,
        digest: [u8; 32],
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let Some(pending) = self.pending_attests.get(&digest) else {
            return;
        };
        if pending.submitted || pending.sigs.len() < self.quorum {
            return;
        }
        let triples: Vec<(usize, RelaySignature<E>, E::G1)> = pending
            .sigs
            .iter()
            .take(self.quorum)
            .map(|(&i, sig)| (i, sig.clone(), view.registry.apub[i].clone()))
            .collect();
        let Ok(proof) = aggregate(&triples, self.n) else {
            return;
        };
        let ctx = pending.ctx.clone();
        self.pending_attests.get_mut(&digest).unwrap().submitted = true;
        self.act_on_proof(now, ctx, proof, view, out);
    }

    fn act_on_proof(
        &mut self,
        now: SimTime,
        ctx: AttestCtx,
        proof: AggregateProof<E>,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        match ctx {
            AttestCtx::ChannelUpdate { batch } => {
                out.push(Effect::Submit {
                    chain: view.home_chain.to_string(),
                    tx: ChainTransaction {
                        submitter: format!("relay-{}", self.id),
                        contract_id: CHANNEL_CONTRACT.to_string(),
                        method: "update_channel".to_string(),
                        args: update_channel_args(CHANNEL, &batch, &proof),
                        salt: 0,
                    },
                });
                self.wakeup = now;
            }
            AttestCtx::ChannelClose { residual, final_state, .. } => {
                out.push(Effect::Submit {
                    chain: view.home_chain.to_string(),
                    tx: ChainTransaction {
                        submitter: format!("relay-{}", self.id),
                        contract_id: CHANNEL_CONTRACT.to_string(),
                        method: "close_channel".to_string(),
                        args: close_channel_args(CHANNEL, &residual, &final_state, &proof),
                        salt: 0,
                    },
                });
            }
            AttestCtx::CcbsAccept { request_bytes, .. } => {
                let Ok(request) = CrossChainRequest::from_bytes(&request_bytes) else {
                    return;
                };
                let mut w = Writer::new();
                w.put_bytes(&request_bytes);
                w.put_bytes(&proof.to_bytes());
                let args = w.into_bytes();
                self.accept_args.insert(request.req_id, args.clone());
                if let Some(state) = self.requests.get_mut(&request.req_id) {
                    state.advance_phase(RequestPhase::Aggregated);
                }
                self.submit_accepts(request.req_id, out);
            }
            AttestCtx::CcbsCallback { result_bytes, .. } => {
                let Ok(result) = crate::contracts::CrossResult::from_bytes(&result_bytes) else {
                    return;
                };
                let mut w = Writer::new();
                w.put_bytes(&result_bytes);
                w.put_bytes(&proof.to_bytes());
                let args = w.into_bytes();
                self.callback_args.insert(result.req_id, args.clone());
                let Some(state) = self.requests.get_mut(&result.req_id) else {
                    return;
                };
                if state.callback_submitted {
                    return;
                }
                state.callback_submitted = true;
                state.advance_phase(RequestPhase::CallbackSubmitted);
                out.push(Effect::Submit {
                    chain: state.request.from_chain.clone(),
                    tx: ChainTransaction {
                        submitter: format!("relay-{}", self.id),
                        contract_id: PROXY_CONTRACT.to_string(),
                        method: "cross_callback".to_string(),
                        args,
                        salt: result.req_id,
                    },
                });
            }
        }
    }

    fn submit_accepts(&mut self, req_id: u64, out: &mut Vec<Effect<E>>) {
        let Some(args) = self.accept_args.get(&req_id).cloned() else {
            return;
        };
        let Some(state) = self.requests.get_mut(&req_id) else {
            return;
        };
        let dests: Vec<String> = state
            .request
            .to
            .iter()
            .map(|(chain, _)| chain.clone())
            .filter(|chain| {
                !state.accept_submitted.contains(chain) && !state.accepts_seen.contains_key(chain)
            })
            .collect();
        for chain in dests {
            state.accept_submitted.insert(chain.clone());
            out.push(Effect::Submit {
                chain,
                tx: ChainTransaction {
                    submitter: format!("relay-{}", self.id),
                    contract_id: PROXY_CONTRACT.to_string(),
                    method: "cross_accept".to_string(),
                    args: args.clone(),
                    salt: req_id,
                },
            });
        }
        state.advance_phase(RequestPhase::AcceptSubmitted);
    }

    // ---- CPBS ----

    fn on_cpbs_result(
        &mut self,
        now: SimTime,
        task_id: u64,
        index: usize,
        payload: Vec<u8>,
        sig: RelaySignature<E>,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        if index >= self.n {
            return;
        }
        let Some(state) = self.tasks.get_mut(&task_id) else {
            return;
        };
        if state.done {
            return;
        }
        let bpk = view.registry.apub[index].clone();
        let inserted = cpbs::verified_insert(
            &mut state.sets,
            index,
            &bpk,
            |payload| {
                task_attest_message(
                    &TaskResult { task_id, payload: payload.to_vec() }.to_bytes(),
                )
            },
            payload,
            sig,
        );
        if !inserted {
            out.push(Effect::Counter("forged_cpbs_sig"));
            return;
        }
        self.try_submit_task_callback(now, task_id, view, out);
    }

    fn try_submit_task_callback(
        &mut self,
        _now: SimTime,
        task_id: u64,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let Some(state) = self.tasks.get_mut(&task_id) else {
            return;
        };
        if state.done || state.submitted {
            return;
        }
        if ccbs::elect_leader(self.n, state.epoch) != self.id {
            return;
        }
        let Some((payload, members)) = state.sets.quorum_set(self.quorum) else {
            return;
        };
        let sigs = state.sets.signatures_for(&payload);
        let by_index: BTreeMap<usize, RelaySignature<E>> = sigs.into_iter().collect();
        let triples: Vec<(usize, RelaySignature<E>, E::G1)> = members
            .iter()
            .take(self.quorum)
            .map(|&i| (i, by_index[&i].clone(), view.registry.apub[i].clone()))
            .collect();
        let Ok(proof) = aggregate(&triples, self.n) else {
            return;
        };
        let result_bytes = TaskResult { task_id, payload }.to_bytes();
        let mut w = Writer::new();
        w.put_bytes(&result_bytes);
        w.put_bytes(&proof.to_bytes());
        state.submitted = true;
        out.push(Effect::Submit {
            chain: view.home_chain.to_string(),
            tx: ChainTransaction {
                submitter: format!("relay-{}", self.id),
                contract_id: COMPUTE_CONTRACT.to_string(),
                method: "task_callback".to_string(),
                args: w.into_bytes(),
                salt: task_id,
            },
        });
    }

    /// Execute the task against committed chain state and broadcast the
    /// signed result. Byzantine nodes corrupt the payload; their signature
    /// still verifies, so only payload-set quorums filter them out.
    fn execute_and_share_task(
        &mut self,
        now: SimTime,
        task_id: u64,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let Some(state) = self.tasks.get(&task_id) else {
            return;
        };
        let task = state.task.clone();
        let cost = view.scenario.committee.proc_ms * (1 + 2 * task.sources.len() as u64);
        let done = self.busy(now, cost);
        out.push(Effect::Metric(MetricSample {
            metric: Metric::ProcessTime,
            label: format!("kind{}", task.kind),
            value_ms: cost,
        }));
        let mut payload = cpbs::execute_task(view.chains, &task);
        if self.byzantine_compute {
            for byte in &mut payload {
                *byte ^= 0xa5;
            }
        }
        let message =
            task_attest_message(&TaskResult { task_id, payload: payload.clone() }.to_bytes());
        let sig = relay_sign(&self.keypair, &message);
        let state = self.tasks.get_mut(&task_id).unwrap();
        state.my_payload = Some(payload.clone());
        state.sets.insert(self.id, payload.clone(), sig.clone());
        let msg = RelayMsg::CpbsResult { task_id, index: self.id, payload, sig };
        self.broadcast(done, view.scenario.committee.link_ms, &msg, out);
        self.try_submit_task_callback(now, task_id, view, out);
    }

    // ---- periodic work ----

    fn on_tick(&mut self, now: SimTime, view: &WorldView<'_, E>, out: &mut Vec<Effect<E>>) {
        let cfg = &view.scenario.committee;
        out.push(Effect::At(
            now + cfg.tick_ms,
            WorldEvent::RelayTick { relay: self.id },
        ));
        self.broadcast(now, cfg.link_ms, &RelayMsg::Heartbeat, out);
        self.poll_chains(now, view, out);
        self.prune_queue(now, view);
        let leader = self.is_ofbs_leader(now, view);
        if leader {
            if self.closing && self.channel_open && !self.queue.is_empty() {
                // Drain before closing: the close attestation covers only the
                // final state, so residual transactions must settle through
                // ordinary update batches first.
                let ctx = AttestCtx::ChannelUpdate { batch: self.queue.clone() };
                self.wakeup = now;
                self.initiate_attest(now, ctx, view, out);
            } else if crate::ofbs::should_flush(
                now.saturating_sub(self.wakeup),
                cfg.timeout_ms,
                self.queue.len(),
                cfg.buffer,
            ) && !self.closing
            {
                let ctx = AttestCtx::ChannelUpdate { batch: self.queue.clone() };
                self.wakeup = now;
                self.initiate_attest(now, ctx, view, out);
            }
            // Re-drive stale submissions; contract guards and world-level
            // tx dedup make repeats harmless.
            let stale: Vec<u64> = self
                .pending_jobs
                .iter()
                .filter(|(_, (_, last))| now.saturating_sub(*last) >= 2 * cfg.tick_ms)
                .map(|(&uuid, _)| uuid)
                .collect();
            for uuid in stale {
                self.drive_job(now, uuid, view, out);
            }
        }
        self.ccbs_watchdog(now, view, out);
        self.cpbs_watchdog(now, view, out);
    }

    /// Dequeue by committed frontier: any transaction whose nonce the
    /// contract has already applied leaves the pending queue. Requires no
    /// extra messages and converges at every node independently.
    fn prune_queue(&mut self, now: SimTime, view: &WorldView<'_, E>) {
        if self.queue.is_empty() {
            return;
        }
        let Some(chain) = view.chains.get(view.home_chain) else {
            return;
        };
        let mut frontier: BTreeMap<Address, u64> = BTreeMap::new();
        for tx in &self.queue {
            if frontier.contains_key(&tx.payer) {
                continue;
            }
            let key = format!("nonce:{CHANNEL}:{}", tx.payer);
            let applied = chain
                .query_state(CHANNEL_CONTRACT, &key)
                .ok()
                .flatten()
                .map(|b| u64::from_be_bytes(b.try_into().unwrap_or_default()))
                .unwrap_or(0);
            frontier.insert(tx.payer.clone(), applied);
        }
        let before = self.queue.len();
        self.queue.retain(|tx| tx.nonce > frontier[&tx.payer]);
        if self.queue.len() < before {
            self.wakeup = now;
        }
    }

    fn poll_chains(&mut self, now: SimTime, view: &WorldView<'_, E>, out: &mut Vec<Effect<E>>) {
        let mut subs = std::mem::take(&mut self.subs);
        for sub in &mut subs {
            let Some(chain) = view.chains.get(&sub.chain_id) else {
                continue;
            };
            for event in sub.poll(chain, now) {
                self.on_chain_event(now, &event, view, out);
            }
        }
        self.subs = subs;
    }

    fn on_chain_event(
        &mut self,
        now: SimTime,
        event: &EventRecord,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let done = self.busy_until.max(now);
        match (event.contract_id.as_str(), event.kind) {
            (CHANNEL_CONTRACT, EventKind::OpenChannel) => {
                let Ok((relay, client, balance)) = decode_open_payload(&event.payload) else {
                    return;
                };
                if relay != CHANNEL {
                    return;
                }
                self.channel_open = true;
                // Additive so it commutes with payment credits this node
                // applied before polling the event.
                *self.view_escrow.entry(client.clone()).or_insert(0) += balance;
                // Resolve the pending open for this client.
                let resolved: Vec<u64> = self
                    .pending_jobs
                    .iter()
                    .filter(|(_, (job, _))| {
                        matches!(job, Job::Open { client: c, .. } if *c == client)
                    })
                    .map(|(&uuid, _)| uuid)
                    .collect();
                for uuid in resolved {
                    self.pending_jobs.remove(&uuid);
                    self.finish_uuid(done, view, uuid, true, "open confirmed", out);
                }
            }
            (CHANNEL_CONTRACT, EventKind::UpdateChannel) => {
                out.push(Effect::Counter("channel_updates_settled"));
            }
            (CHANNEL_CONTRACT, EventKind::CloseChannel) => {
                self.channel_open = false;
                self.closing = false;
                self.view_escrow.clear();
                self.view_nonces.clear();
                self.queue.clear();
                self.pending_attests.retain(|_, p| {
                    !matches!(
                        p.ctx,
                        AttestCtx::ChannelUpdate { .. } | AttestCtx::ChannelClose { .. }
                    )
                });
                let resolved: Vec<u64> = self
                    .pending_jobs
                    .iter()
                    .filter(|(_, (job, _))| matches!(job, Job::Close))
                    .map(|(&uuid, _)| uuid)
                    .collect();
                for uuid in resolved {
                    self.pending_jobs.remove(&uuid);
                    self.finish_uuid(done, view, uuid, true, "closed", out);
                }
            }
            (PROXY_CONTRACT, EventKind::Request) => {
                let Ok(request) = CrossChainRequest::from_bytes(&event.payload) else {
                    return;
                };
                if request.from_chain != event.chain_id {
                    return;
                }
                // The origin submission landed; stop re-driving it.
                self.pending_jobs.remove(&request.origin_uuid);
                let req_id = request.req_id;
                let state = self
                    .requests
                    .entry(req_id)
                    .or_insert_with(|| RequestState::new(request, now));
                state.advance_phase(RequestPhase::Prepared);
                if ccbs::elect_leader(self.n, state.epoch) == self.id {
                    self.lead_accept_round(now, req_id, view, out);
                }
            }
            (PROXY_CONTRACT, EventKind::Accept) => {
                let Ok(record) = AcceptRecord::from_bytes(&event.payload) else {
                    return;
                };
                if record.chain_id != event.chain_id {
                    return;
                }
                let req_id = record.req_id;
                let Some(state) = self.requests.get_mut(&req_id) else {
                    return;
                };
                state.accepts_seen.insert(record.chain_id.clone(), record);
                if state.all_destinations_accepted()
                    && state.outcome.is_none()
                    && ccbs::elect_leader(self.n, state.epoch) == self.id
                {
                    self.lead_callback_round(now, req_id, view, out);
                }
            }
            (PROXY_CONTRACT, EventKind::Callback) => {
                if event.chain_id != view.home_chain
                    && !view.chains.contains_key(&event.chain_id)
                {
                    return;
                }
                let Ok(result) = crate::contracts::CrossResult::from_bytes(&event.payload) else {
                    return;
                };
                let Some(state) = self.requests.get_mut(&result.req_id) else {
                    return;
                };
                if state.outcome.is_some() {
                    return;
                }
                state.outcome = Some(RequestOutcome::Completed);
                state.advance_phase(RequestPhase::Done);
                let origin = state.request.origin_uuid;
                out.push(Effect::Audit(AuditRecord::RequestOutcome {
                    req_id: result.req_id,
                    outcome: RequestOutcome::Completed.name(),
                }));
                out.push(Effect::Counter("cross_completed"));
                self.gc_request_attests(result.req_id);
                let body = format!("cross {} completed", result.req_id);
                self.finish_uuid(done, view, origin, true, &body, out);
            }
            (COMPUTE_CONTRACT, EventKind::Request) => {
                let Ok(task) = ComputeTask::from_bytes(&event.payload) else {
                    return;
                };
                let task_id = task.task_id;
                // The submission landed; stop re-driving it. Replies key off
                // the task id, which doubles as the origin packet uuid.
                self.pending_jobs.retain(|_, (job, _)| {
                    !matches!(job, Job::SubmitTask { task_bytes }
                        if ComputeTask::from_bytes(task_bytes)
                            .is_ok_and(|t| t.task_id == task_id))
                });
                if self.tasks.contains_key(&task_id) {
                    return;
                }
                self.tasks.insert(
                    task_id,
                    TaskState {
                        task,
                        epoch: 0,
                        started_epoch_at: now,
                        sets: CandidateSets::default(),
                        my_payload: None,
                        submitted: false,
                        done: false,
                    },
                );
                self.execute_and_share_task(now, task_id, view, out);
            }
            (COMPUTE_CONTRACT, EventKind::Callback) => {
                let Ok(result) = TaskResult::from_bytes(&event.payload) else {
                    return;
                };
                let Some(state) = self.tasks.get_mut(&result.task_id) else {
                    return;
                };
                if state.done {
                    return;
                }
                state.done = true;
                let kind = state.task.kind;
                out.push(Effect::Counter("tasks_completed"));
                let body = cpbs::render_result(kind, &result.payload);
                self.finish_uuid(done, view, result.task_id, true, &body, out);
            }
            _ => {}
        }
    }

    fn lead_accept_round(
        &mut self,
        now: SimTime,
        req_id: u64,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        // A proof from an earlier epoch still stands; just resubmit.
        if self.accept_args.contains_key(&req_id) {
            self.submit_accepts(req_id, out);
            return;
        }
        let Some(state) = self.requests.get(&req_id) else {
            return;
        };
        let request_bytes = state.request_bytes.clone();
        let leader_sig = ccbs::sign_prepare(&self.sign_key, ccbs::PHASE_ACCEPT, &request_bytes);
        let ctx = AttestCtx::CcbsAccept { request_bytes, leader: self.id, leader_sig };
        self.initiate_attest(now, ctx, view, out);
    }

    fn lead_callback_round(
        &mut self,
        now: SimTime,
        req_id: u64,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let ready_args = self.callback_args.get(&req_id).cloned();
        let Some(state) = self.requests.get_mut(&req_id) else {
            return;
        };
        if state.callback_submitted {
            return;
        }
        if let Some(args) = ready_args {
            state.callback_submitted = true;
            out.push(Effect::Submit {
                chain: state.request.from_chain.clone(),
                tx: ChainTransaction {
                    submitter: format!("relay-{}", self.id),
                    contract_id: PROXY_CONTRACT.to_string(),
                    method: "cross_callback".to_string(),
                    args,
                    salt: req_id,
                },
            });
            return;
        }
        let Some(result) = state.assemble_result() else {
            return;
        };
        let result_bytes = result.to_bytes();
        let leader_sig = ccbs::sign_prepare(&self.sign_key, ccbs::PHASE_CALLBACK, &result_bytes);
        let ctx = AttestCtx::CcbsCallback { result_bytes, leader: self.id, leader_sig };
        self.initiate_attest(now, ctx, view, out);
    }

    /// Drop attestation rounds for a request that reached a terminal
    /// outcome, so they stop blocking quiescence.
    fn gc_request_attests(&mut self, req_id: u64) {
        self.pending_attests.retain(|_, p| match &p.ctx {
            AttestCtx::CcbsAccept { request_bytes, .. } => {
                CrossChainRequest::from_bytes(request_bytes)
                    .map_or(true, |r| r.req_id != req_id)
            }
            AttestCtx::CcbsCallback { result_bytes, .. } => {
                crate::contracts::CrossResult::from_bytes(result_bytes)
                    .map_or(true, |r| r.req_id != req_id)
            }
            _ => true,
        });
    }

    fn ccbs_watchdog(&mut self, now: SimTime, view: &WorldView<'_, E>, out: &mut Vec<Effect<E>>) {
        let cfg = &view.scenario.committee;
        let stuck: Vec<u64> = self
            .requests
            .iter()
            .filter(|(_, s)| {
                s.outcome.is_none() && now.saturating_sub(s.started_epoch_at) > cfg.ccbs_epoch_ms
            })
            .map(|(&id, _)| id)
            .collect();
        for req_id in stuck {
            let state = self.requests.get_mut(&req_id).unwrap();
            state.bump_epoch(now);
            if state.epoch >= cfg.max_epochs {
                state.outcome = Some(RequestOutcome::StuckPending);
                state.advance_phase(RequestPhase::Done);
                let origin = state.request.origin_uuid;
                out.push(Effect::Audit(AuditRecord::RequestOutcome {
                    req_id,
                    outcome: RequestOutcome::StuckPending.name(),
                }));
                out.push(Effect::Counter("cross_stuck"));
                self.gc_request_attests(req_id);
                self.finish_uuid(
                    self.busy_until.max(now),
                    view,
                    origin,
                    false,
                    "request stuck",
                    out,
                );
                continue;
            }
            if ccbs::elect_leader(self.n, state.epoch) == self.id {
                if state.all_destinations_accepted() {
                    self.lead_callback_round(now, req_id, view, out);
                } else {
                    self.lead_accept_round(now, req_id, view, out);
                }
            }
        }
    }

    fn cpbs_watchdog(&mut self, now: SimTime, view: &WorldView<'_, E>, out: &mut Vec<Effect<E>>) {
        let cfg = &view.scenario.committee;
        let stale: Vec<u64> = self
            .tasks
            .iter()
            .filter(|(_, s)| {
                !s.done && now.saturating_sub(s.started_epoch_at) > cfg.ccbs_epoch_ms
            })
            .map(|(&id, _)| id)
            .collect();
        for task_id in stale {
            let state = self.tasks.get_mut(&task_id).unwrap();
            state.epoch += 1;
            state.started_epoch_at = now;
            state.submitted = false;
            if state.epoch >= cfg.max_epochs {
                state.done = true;
                out.push(Effect::Counter("tasks_stuck"));
                self.finish_uuid(
                    self.busy_until.max(now),
                    view,
                    task_id,
                    false,
                    "task stuck",
                    out,
                );
                continue;
            }
            // Re-share my result so a new leader has a full candidate pool.
            if let Some(payload) = state.my_payload.clone() {
                let message = task_attest_message(
                    &TaskResult { task_id, payload: payload.clone() }.to_bytes(),
                );
                let sig = relay_sign(&self.keypair, &message);
                let msg = RelayMsg::CpbsResult { task_id, index: self.id, payload, sig };
                let done = self.busy_until.max(now);
                self.broadcast(done, cfg.link_ms, &msg, out);
            }
            self.try_submit_task_callback(now, task_id, view, out);
        }
    }
}

fn parse_mobile(mobile: &str) -> Option<usize> {
    mobile.strip_prefix("relay-")?.parse().ok()
}

fn decode_open_payload(payload: &[u8]) -> Result<(String, Address, u64), crate::wire::WireError> {
    let mut r = crate::wire::Reader::new(payload);
    let relay = r.get_str()?;
    let client = r.get_str()?;
    let balance = r.get_u64()?;
    r.finish()?;
    Ok((relay, client, balance))
}
