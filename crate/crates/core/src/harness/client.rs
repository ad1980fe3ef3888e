//! Scripted offline client: opens a channel, pays peers over SMS, and
//! optionally issues cross-chain and compute requests, with uuid-keyed
//! retries rotating over relays.

use std::collections::VecDeque;

use rand::RngExt;
use rand_chacha::ChaCha20Rng;

use crate::contracts::{ComputeTask, CrossChainRequest, OffChainTx, TASK_ACCOUNT_ACTIVITY, TASK_BALANCE_AT};
use crate::crypto::{Address, BilinearEngine, ClientKeyPair};
use crate::harness::metrics::{Metric, MetricSample};
use crate::harness::relay::kind_label;
use crate::harness::types::{AuditRecord, ClientReply, Effect, WorldEvent, WorldView, CHANNEL};
use crate::sim::SimTime;
use crate::sms::{plan_delivery, PacketContent, PacketKind, RetryState, SmsPacket};

const MAX_ATTEMPTS: u32 = 5;
const ACK_TIMEOUT_MS: u64 = 4_000;

#[derive(Debug, Clone)]
pub enum ClientOp {
    Open { amount: u64 },
    Pay { to: Address },
    Close,
    Cross { dest_chain: String, amount: u64 },
    Task { kind: u8 },
}

impl ClientOp {
    fn kind(&self) -> PacketKind {
        match self {
            ClientOp::Open { .. } => PacketKind::OpenChannel,
            ClientOp::Pay { .. } => PacketKind::OffChainPay,
            ClientOp::Close => PacketKind::CloseChannel,
            ClientOp::Cross { .. } => PacketKind::CrossChain,
            ClientOp::Task { .. } => PacketKind::ComputeTask,
        }
    }
}

struct Waiting {
    uuid: u64,
    op: ClientOp,
    packet_bytes: Vec<u8>,
    /// Nonce used if this is a payment, confirmed on ack.
    nonce: u64,
    amount: u64,
    first_sent_at: SimTime,
    retry: RetryState,
}

enum State {
    Idle,
    Waiting(Waiting),
    Done,
}

pub struct ClientActor {
    pub id: usize,
    pub key: ClientKeyPair,
    rng: ChaCha20Rng,
    n_relays: usize,
    script: VecDeque<ClientOp>,
    state: State,
    token: u64,
    uuid_seq: u64,
    /// Last payment nonce the committee acknowledged.
    nonce: u64,
    /// Local view of spendable escrow, for drawing payment amounts.
    escrow_remaining: u64,
    pay_amount_max: u64,
    pub completed_ops: u64,
    pub failed_ops: u64,
    pub results: Vec<(u64, String)>,
}

impl ClientActor {
    pub fn new(
        id: usize,
        key: ClientKeyPair,
        rng: ChaCha20Rng,
        n_relays: usize,
        script: Vec<ClientOp>,
        pay_amount_max: u64,
    ) -> Self {
        Self {
            id,
            key,
            rng,
            n_relays,
            script: script.into(),
            state: State::Idle,
            token: 0,
            uuid_seq: 0,
            nonce: 0,
            escrow_remaining: 0,
            pay_amount_max,
            completed_ops: 0,
            failed_ops: 0,
            results: Vec::new(),
        }
    }

    /// Deterministic per-client script from the workload mix.
    pub fn build_script(
        id: usize,
        peers: &[Address],
        non_home_chains: &[String],
        workload: &crate::harness::scenario::WorkloadConfig,
        initial_balance: u64,
    ) -> Vec<ClientOp> {
        let mut script = Vec::new();
        if workload.open_channel {
            let needed = workload.offchain_pays as u64 * workload.pay_amount_max + 10;
            script.push(ClientOp::Open { amount: needed.min(initial_balance) });
            for k in 0..workload.offchain_pays {
                let to = peers[(id + 1 + k % peers.len().max(1)) % peers.len()].clone();
                script.push(ClientOp::Pay { to });
            }
        }
        for k in 0..workload.cross_requests {
            if non_home_chains.is_empty() {
                break;
            }
            let dest_chain = non_home_chains[(id + k) % non_home_chains.len()].clone();
            script.push(ClientOp::Cross { dest_chain, amount: workload.cross_amount });
        }
        for k in 0..workload.compute_tasks {
            let kind = if (id + k) % 2 == 0 { TASK_ACCOUNT_ACTIVITY } else { TASK_BALANCE_AT };
            script.push(ClientOp::Task { kind });
        }
        if workload.close_channel && workload.open_channel && id == 0 {
            // One client closes the shared committee channel at the end.
            script.push(ClientOp::Close);
        }
        script
    }

    pub fn done(&self) -> bool {
        matches!(self.state, State::Done)
    }

    /// Invalidate outstanding timers and return the token for the next
    /// scheduled wake; used by the world to seed the initial wake.
    pub fn arm(&mut self) -> u64 {
        self.token += 1;
        self.token
    }

    fn next_uuid(&mut self) -> u64 {
        self.uuid_seq += 1;
        ((self.id as u64 + 1) << 32) | self.uuid_seq
    }

    fn home_relay(&self) -> usize {
        self.id % self.n_relays
    }

    pub fn handle<E: BilinearEngine>(
        &mut self,
        now: SimTime,
        event: WorldEvent<E>,
        view: &WorldView<'_, E>,
    ) -> Vec<Effect<E>> {
        let mut out = Vec::new();
        match event {
            WorldEvent::ClientWake { token, .. } => {
                if token != self.token {
                    return out; // stale timer
                }
                match &self.state {
                    State::Idle => self.start_next_op(now, view, &mut out),
                    State::Waiting(_) => self.on_retry_timer(now, view, &mut out),
                    State::Done => {}
                }
            }
            WorldEvent::ClientDeliver { reply, .. } => {
                self.on_reply(now, reply, view, &mut out);
            }
            _ => {}
        }
        out
    }

    fn schedule_wake<E: BilinearEngine>(
        &mut self,
        at: SimTime,
        out: &mut Vec<Effect<E>>,
    ) {
        self.token += 1;
        out.push(Effect::At(
            at,
            WorldEvent::ClientWake { client: self.id, token: self.token },
        ));
    }

    fn start_next_op<E: BilinearEngine>(
        &mut self,
        now: SimTime,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let Some(op) = self.script.pop_front() else {
            self.state = State::Done;
            out.push(Effect::Counter("clients_finished"));
            return;
        };
        // Closing tears down the whole committee channel; hold it until the
        // other clients have stopped paying into it.
        if matches!(op, ClientOp::Close) && view.clients_active > 1 {
            self.script.push_front(op);
            self.schedule_wake(now + 100, out);
            return;
        }
        let uuid = self.next_uuid();
        let mut nonce = 0;
        let mut amount = 0;
        let content = match &op {
            ClientOp::Open { amount: deposit } => {
                amount = *deposit;
                PacketContent {
                    kind: PacketKind::OpenChannel,
                    dest_address: String::new(),
                    amount: *deposit,
                    nonce: 0,
                    data: Vec::new(),
                }
            }
            ClientOp::Pay { to } => {
                nonce = self.nonce + 1;
                let cap = self.pay_amount_max.min(self.escrow_remaining);
                if cap == 0 {
                    // Out of escrow; skip the payment and move on.
                    out.push(Effect::Counter("pay_skipped_no_escrow"));
                    self.state = State::Idle;
                    self.schedule_wake(now + 1, out);
                    return;
                }
                amount = self.rng.random_range(1..=cap);
                let tx = OffChainTx::signed(CHANNEL, &self.key, to, amount, nonce);
                PacketContent {
                    kind: PacketKind::OffChainPay,
                    dest_address: to.clone(),
                    amount,
                    nonce,
                    data: tx.signature.0,
                }
            }
            ClientOp::Close => PacketContent {
                kind: PacketKind::CloseChannel,
                dest_address: String::new(),
                amount: 0,
                nonce: 0,
                data: Vec::new(),
            },
            ClientOp::Cross { dest_chain, amount: value } => {
                let request = CrossChainRequest {
                    req_id: uuid,
                    from_chain: view.home_chain.to_string(),
                    from_account: self.key.address.clone(),
                    to: vec![(dest_chain.clone(), self.key.address.clone())],
                    amount: *value,
                    data: vec![0u8; view.scenario.workload.payload_pad],
                    origin_uuid: uuid,
                };
                out.push(Effect::Audit(AuditRecord::RequestIssued {
                    request_bytes: request.to_bytes(),
                }));
                PacketContent {
                    kind: PacketKind::CrossChain,
                    dest_address: String::new(),
                    amount: *value,
                    nonce: 0,
                    data: request.to_bytes(),
                }
            }
            ClientOp::Task { kind } => {
                let task = ComputeTask {
                    task_id: uuid,
                    kind: *kind,
                    target_account: self.key.address.clone(),
                    from_height: 0,
                    to_height: 1,
                    sources: vec![view.home_chain.to_string()],
                };
                out.push(Effect::Audit(AuditRecord::TaskIssued {
                    task_bytes: task.to_bytes(),
                }));
                PacketContent {
                    kind: PacketKind::ComputeTask,
                    dest_address: String::new(),
                    amount: 0,
                    nonce: 0,
                    data: task.to_bytes(),
                }
            }
        };
        let signature = self.key.sign(&content.canonical_bytes());
        let packet = SmsPacket {
            uuid,
            mobile: format!("relay-{}", self.home_relay()),
            content,
            sender_address: self.key.address.clone(),
            signature,
            timestamp: now,
        };
        let packet_bytes = packet.to_bytes();
        let mut waiting = Waiting {
            uuid,
            op,
            packet_bytes,
            nonce,
            amount,
            first_sent_at: now,
            retry: RetryState::new(uuid, MAX_ATTEMPTS, ACK_TIMEOUT_MS),
        };
        self.transmit(now, &mut waiting, view, out);
        self.state = State::Waiting(waiting);
        self.schedule_wake(now + ACK_TIMEOUT_MS, out);
    }

    /// One delivery attempt; attempt k goes to relay (home + k) mod n.
    fn transmit<E: BilinearEngine>(
        &mut self,
        now: SimTime,
        waiting: &mut Waiting,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let target = (self.home_relay() + waiting.retry.attempts_made as usize) % self.n_relays;
        waiting.retry.record_attempt();
        for (at, segment) in plan_delivery(
            &waiting.packet_bytes,
            waiting.uuid,
            view.profile,
            now,
            &mut self.rng,
        ) {
            out.push(Effect::At(at, WorldEvent::SegmentArrive { relay: target, segment }));
        }
    }

    fn on_retry_timer<E: BilinearEngine>(
        &mut self,
        now: SimTime,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let State::Waiting(mut waiting) = std::mem::replace(&mut self.state, State::Idle) else {
            return;
        };
        match waiting.retry.on_timeout() {
            crate::sms::RetryDecision::Resend => {
                self.transmit(now, &mut waiting, view, out);
                self.state = State::Waiting(waiting);
                self.schedule_wake(now + ACK_TIMEOUT_MS, out);
            }
            crate::sms::RetryDecision::GiveUp => {
                self.failed_ops += 1;
                out.push(Effect::Counter("ops_undeliverable"));
                // An unacked payment leaves the nonce frontier uncertain;
                // stop rather than wedge every later payment.
                if matches!(waiting.op, ClientOp::Pay { .. } | ClientOp::Open { .. }) {
                    self.state = State::Done;
                    out.push(Effect::Counter("clients_gave_up"));
                } else {
                    self.schedule_wake(now + 1, out);
                }
            }
        }
    }

    fn on_reply<E: BilinearEngine>(
        &mut self,
        now: SimTime,
        reply: ClientReply,
        view: &WorldView<'_, E>,
        out: &mut Vec<Effect<E>>,
    ) {
        let State::Waiting(waiting) = &self.state else {
            return;
        };
        if waiting.uuid != reply.uuid {
            return; // late duplicate for an earlier operation
        }
        let label = kind_label(waiting.op.kind());
        out.push(Effect::Metric(MetricSample {
            metric: Metric::TotalService,
            label: label.to_string(),
            value_ms: now.saturating_sub(waiting.first_sent_at),
        }));
        if reply.ok {
            self.completed_ops += 1;
            out.push(Effect::Counter("ops_completed"));
            match &waiting.op {
                ClientOp::Open { amount } => self.escrow_remaining = *amount,
                ClientOp::Pay { .. } => {
                    self.nonce = waiting.nonce;
                    self.escrow_remaining =
                        self.escrow_remaining.saturating_sub(waiting.amount);
                }
                _ => {}
            }
        } else {
            self.failed_ops += 1;
            out.push(Effect::Counter("ops_failed"));
        }
        self.results.push((reply.uuid, reply.body));
        let think = view.scenario.workload.think_ms;
        self.state = State::Idle;
        self.schedule_wake(now + think.max(1), out);
    }
}
