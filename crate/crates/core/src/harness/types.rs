//! Shared event, effect, and message types wiring actors to the scheduler.

use std::collections::BTreeMap;

use crate::contracts::OffChainTx;
use crate::crypto::{Address, AggregateRegistry, BilinearEngine, ClientSignature, RelaySignature};
use crate::harness::metrics::MetricSample;
use crate::harness::scenario::Scenario;
use crate::ofbs::BftMessage;
use crate::sim::SimTime;
use crate::simchain::{Chain, ChainTransaction};
use crate::sms::{NetworkProfile, SmsSegment};

/// The single relay committee's channel id on the channel contract.
pub const CHANNEL: &str = "committee-0";
pub const CHANNEL_CONTRACT: &str = "channel";
pub const PROXY_CONTRACT: &str = "proxy";
pub const COMPUTE_CONTRACT: &str = "compute";

/// Inter-relay traffic, delivered over the committee's internal links.
#[derive(Debug, Clone)]
pub enum RelayMsg<E: BilinearEngine> {
    Heartbeat,
    /// The receiving relay fans the raw packet out so every node can seed
    /// its consensus instance for that uuid.
    PacketGossip { packet_bytes: Vec<u8>, receiver: usize },
    Bft { instance: u64, msg: BftMessage },
    /// Self-scheduled consensus round timer.
    BftTimeout { instance: u64, view: u64 },
    /// Leader asks the committee to validate and sign an action.
    AttestRequest { ctx: AttestCtx },
    /// One member's component signature over the context's message bytes.
    AttestSig {
        digest: [u8; 32],
        index: usize,
        sig: RelaySignature<E>,
    },
    /// CPBS: a node's independently computed result for a task.
    CpbsResult {
        task_id: u64,
        index: usize,
        payload: Vec<u8>,
        sig: RelaySignature<E>,
    },
}

/// What an attestation round is about; each kind fixes both the message
/// bytes members sign and the validation they run first.
#[derive(Debug, Clone)]
pub enum AttestCtx {
    ChannelUpdate {
        batch: Vec<OffChainTx>,
    },
    ChannelClose {
        residual: Vec<OffChainTx>,
        final_state: Vec<(Address, u64)>,
        close_uuid: u64,
    },
    CcbsAccept {
        request_bytes: Vec<u8>,
        leader: usize,
        leader_sig: ClientSignature,
    },
    CcbsCallback {
        result_bytes: Vec<u8>,
        leader: usize,
        leader_sig: ClientSignature,
    },
}

/// SMS-carried reply from the relay network back to a client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientReply {
    pub uuid: u64,
    pub ok: bool,
    pub body: String,
}

#[derive(Debug, Clone)]
pub enum WorldEvent<E: BilinearEngine> {
    /// `token` invalidates stale timers: a client only acts on the wake it
    /// scheduled for its current state.
    ClientWake { client: usize, token: u64 },
    SegmentArrive { relay: usize, segment: SmsSegment },
    RelayDeliver { to: usize, from: usize, msg: RelayMsg<E> },
    RelayTick { relay: usize },
    ClientDeliver { client: usize, reply: ClientReply },
    ProduceBlock { chain: String },
    CrashRelay { relay: usize },
}

/// Deterministic processing order inside one timestamp batch: relays, then
/// clients; chain events run last in the serial apply phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ActorKey {
    Relay(usize),
    Client(usize),
}

impl<E: BilinearEngine> WorldEvent<E> {
    pub fn actor(&self) -> Option<ActorKey> {
        match self {
            WorldEvent::ClientWake { client, .. } | WorldEvent::ClientDeliver { client, .. } => {
                Some(ActorKey::Client(*client))
            }
            WorldEvent::SegmentArrive { relay, .. }
            | WorldEvent::RelayDeliver { to: relay, .. }
            | WorldEvent::RelayTick { relay }
            | WorldEvent::CrashRelay { relay } => Some(ActorKey::Relay(*relay)),
            WorldEvent::ProduceBlock { .. } => None,
        }
    }
}

/// Audit records the world keeps for end-of-run invariant checking.
#[derive(Debug, Clone)]
pub enum AuditRecord {
    RequestIssued { request_bytes: Vec<u8> },
    TaskIssued { task_bytes: Vec<u8> },
    RequestOutcome { req_id: u64, outcome: &'static str },
}

/// Side effects an actor hands back to the scheduler.
#[derive(Debug, Clone)]
pub enum Effect<E: BilinearEngine> {
    At(SimTime, WorldEvent<E>),
    Submit { chain: String, tx: ChainTransaction },
    Metric(MetricSample),
    Counter(&'static str),
    Audit(AuditRecord),
    Log(String),
    Violation(String),
}

/// Immutable view of the world handed to actor handlers; shared state is
/// read-only here so actors can run in parallel.
pub struct WorldView<'a, E: BilinearEngine> {
    pub now: SimTime,
    pub chains: &'a BTreeMap<String, Chain<E>>,
    pub registry: &'a AggregateRegistry<E>,
    /// Relay ed25519 keys used for leader-signed broadcasts.
    pub relay_pks: &'a [[u8; 32]],
    /// Registered client keys by address.
    pub client_pks: &'a BTreeMap<Address, [u8; 32]>,
    /// Client actor index by address, for routing replies.
    pub client_index: &'a BTreeMap<Address, usize>,
    pub profile: &'a NetworkProfile,
    pub scenario: &'a Scenario,
    pub home_chain: &'a str,
    /// Clients that have not finished their scripts, as of this batch.
    pub clients_active: usize,
}

impl<E: BilinearEngine> Effect<E> {
    pub fn at(time: SimTime, event: WorldEvent<E>) -> Self {
        Effect::At(time, event)
    }
}
