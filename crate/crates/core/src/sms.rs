//! Simulated SMS channel between offline clients and relay nodes:
//! typed packets, 140-byte segmentation, loss/latency/bandwidth shaping,
//! and client-side retry bookkeeping.

use rand::Rng;
use thiserror::Error;

use crate::crypto::{Address, ClientSignature};
use crate::sim::SimTime;
use crate::wire::{Reader, Writer, WireError};

pub const SEGMENT_PAYLOAD_MAX: usize = 140;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SmsError {
    #[error("malformed packet: {0}")]
    Wire(#[from] WireError),
    #[error("segment set incomplete or inconsistent")]
    BadSegments,
    #[error("unknown packet kind {0}")]
    UnknownKind(u8),
}

/// Latency / bandwidth / loss triple, after the comcast-style shaping the
/// experiments used.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkProfile {
    pub name: String,
    /// One-way latency tau, ms.
    pub latency_ms: u64,
    /// Bandwidth beta in kbit/s, i.e. bits per virtual millisecond.
    pub bandwidth_kbit: u64,
    /// Loss percentage iota in [0, 100], applied per segment.
    pub loss_percent: f64,
}

impl NetworkProfile {
    pub fn new(name: &str, latency_ms: u64, bandwidth_kbit: u64, loss_percent: f64) -> Self {
        assert!(bandwidth_kbit > 0, "bandwidth must be positive");
        assert!((0.0..=100.0).contains(&loss_percent), "loss out of range");
        Self {
            name: name.to_string(),
            latency_ms,
            bandwidth_kbit,
            loss_percent,
        }
    }

    /// Unshaped baseline.
    pub fn default_profile() -> Self {
        Self::new("DEFAULT", 0, 1_000_000, 0.0)
    }

    pub fn wifi() -> Self {
        Self::new("WIFI", 40, 30_000, 0.2)
    }

    pub fn edge() -> Self {
        Self::new("EDGE", 300, 250, 1.5)
    }

    pub fn gprs() -> Self {
        Self::new("GPRS", 500, 50, 2.0)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "DEFAULT" => Some(Self::default_profile()),
            "WIFI" => Some(Self::wifi()),
            "EDGE" => Some(Self::edge()),
            "GPRS" => Some(Self::gprs()),
            _ => None,
        }
    }

    /// Serialization time of `bytes` on this link, in whole milliseconds.
    ///
    /// beta kbit/s is exactly beta bits per millisecond, so this is
    /// ceil(bits / beta).
    pub fn transmit_ms(&self, bytes: usize) -> u64 {
        let bits = bytes as u64 * 8;
        bits.div_ceil(self.bandwidth_kbit)
    }
}

/// What the relay network should do with a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PacketKind {
    OpenChannel,
    OffChainPay,
    CloseChannel,
    CrossChain,
    ComputeTask,
}

impl PacketKind {
    pub fn code(self) -> u8 {
        match self {
            PacketKind::OpenChannel => 1,
            PacketKind::OffChainPay => 2,
            PacketKind::CloseChannel => 3,
            PacketKind::CrossChain => 4,
            PacketKind::ComputeTask => 5,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, SmsError> {
        Ok(match code {
            1 => PacketKind::OpenChannel,
            2 => PacketKind::OffChainPay,
            3 => PacketKind::CloseChannel,
            4 => PacketKind::CrossChain,
            5 => PacketKind::ComputeTask,
            other => return Err(SmsError::UnknownKind(other)),
        })
    }
}

/// Typed payload of a client packet. `kind` decides which fields matter:
/// channel operations use `dest_address`/`amount`/`nonce`, cross-chain and
/// compute requests carry their canonical request bytes in `data`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketContent {
    pub kind: PacketKind,
    pub dest_address: Address,
    pub amount: u64,
    pub nonce: u64,
    pub data: Vec<u8>,
}

impl PacketContent {
    /// The exact bytes the client signs.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u8(self.kind.code());
        w.put_str(&self.dest_address);
        w.put_u64(self.amount);
        w.put_u64(self.nonce);
        w.put_bytes(&self.data);
        w.into_bytes()
    }

    fn decode(r: &mut Reader) -> Result<Self, SmsError> {
        let kind = PacketKind::from_code(r.get_u8()?)?;
        Ok(Self {
            kind,
            dest_address: r.get_str()?,
            amount: r.get_u64()?,
            nonce: r.get_u64()?,
            data: r.get_bytes()?,
        })
    }
}

/// A signed client message carried over the SMS transport.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmsPacket {
    pub uuid: u64,
    pub mobile: String,
    pub content: PacketContent,
    pub sender_address: Address,
    pub signature: ClientSignature,
    pub timestamp: SimTime,
}

impl SmsPacket {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u64(self.uuid);
        w.put_str(&self.mobile);
        let content = self.content.canonical_bytes();
        w.put_bytes(&content);
        w.put_str(&self.sender_address);
        w.put_bytes(&self.signature.0);
        w.put_u64(self.timestamp);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SmsError> {
        let mut r = Reader::new(bytes);
        let uuid = r.get_u64()?;
        let mobile = r.get_str()?;
        let content_bytes = r.get_bytes()?;
        let mut cr = Reader::new(&content_bytes);
        let content = PacketContent::decode(&mut cr)?;
        cr.finish()?;
        let sender_address = r.get_str()?;
        let signature = ClientSignature(r.get_bytes()?);
        let timestamp = r.get_u64()?;
        r.finish()?;
        Ok(Self {
            uuid,
            mobile,
            content,
            sender_address,
            signature,
            timestamp,
        })
    }
}

/// One SMS-sized fragment of a packet.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SmsSegment {
    pub uuid: u64,
    pub seq_no: u32,
    pub total: u32,
    pub payload: Vec<u8>,
}

impl SmsSegment {
    pub fn wire_size(&self) -> usize {
        // uuid + seq_no + total + length prefix + payload
        8 + 4 + 4 + 4 + self.payload.len()
    }
}

/// Split packet bytes into <=140-byte segments.
pub fn segment(uuid: u64, bytes: &[u8]) -> Vec<SmsSegment> {
    let chunks: Vec<&[u8]> = if bytes.is_empty() {
        vec![&[]]
    } else {
        bytes.chunks(SEGMENT_PAYLOAD_MAX).collect()
    };
    let total = chunks.len() as u32;
    chunks
        .into_iter()
        .enumerate()
        .map(|(i, payload)| SmsSegment {
            uuid,
            seq_no: i as u32,
            total,
            payload: payload.to_vec(),
        })
        .collect()
}

/// Rebuild packet bytes from segments in any arrival order.
pub fn reassemble(segments: &[SmsSegment]) -> Result<Vec<u8>, SmsError> {
    let first = segments.first().ok_or(SmsError::BadSegments)?;
    let total = first.total as usize;
    if segments.len() != total {
        return Err(SmsError::BadSegments);
    }
    let mut by_seq: Vec<Option<&SmsSegment>> = vec![None; total];
    for seg in segments {
        if seg.uuid != first.uuid || seg.total != first.total {
            return Err(SmsError::BadSegments);
        }
        let slot = by_seq
            .get_mut(seg.seq_no as usize)
            .ok_or(SmsError::BadSegments)?;
        if slot.is_some() {
            return Err(SmsError::BadSegments);
        }
        *slot = Some(seg);
    }
    let mut out = Vec::new();
    for slot in by_seq {
        out.extend_from_slice(&slot.ok_or(SmsError::BadSegments)?.payload);
    }
    Ok(out)
}

/// Per-destination reassembly buffer with uuid-level delivery dedup.
#[derive(Debug, Default, Clone)]
pub struct Reassembler {
    pending: std::collections::BTreeMap<u64, Vec<SmsSegment>>,
    delivered: std::collections::BTreeSet<u64>,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed one arriving segment; returns the packet bytes once the last
    /// missing segment arrives. A uuid already delivered is ignored.
    pub fn offer(&mut self, seg: SmsSegment) -> Option<Vec<u8>> {
        if self.delivered.contains(&seg.uuid) {
            return None;
        }
        let entry = self.pending.entry(seg.uuid).or_default();
        if entry.iter().any(|s| s.seq_no == seg.seq_no) {
            return None;
        }
        entry.push(seg);
        let uuid = entry[0].uuid;
        if entry.len() == entry[0].total as usize {
            let bytes = reassemble(entry).ok()?;
            self.pending.remove(&uuid);
            self.delivered.insert(uuid);
            return Some(bytes);
        }
        None
    }
}

/// Deterministic delivery schedule for one packet: per segment, either a
/// loss draw or an arrival time `now + tau + cumulative transmit time`.
/// Segments share the link, so transmit times serialize.
pub fn plan_delivery(
    packet_bytes: &[u8],
    uuid: u64,
    profile: &NetworkProfile,
    now: SimTime,
    rng: &mut impl Rng,
) -> Vec<(SimTime, SmsSegment)> {
    let mut out = Vec::new();
    let mut cumulative = 0u64;
    for seg in segment(uuid, packet_bytes) {
        cumulative += profile.transmit_ms(seg.wire_size());
        let draw = rng.next_u64() as f64 / u64::MAX as f64 * 100.0;
        if draw < profile.loss_percent {
            continue; // modeled loss, not an error
        }
        out.push((now + profile.latency_ms + cumulative, seg));
    }
    out
}

/// Client-side retry bookkeeping: resend the same uuid until acked or out
/// of attempts.
#[derive(Debug, Clone)]
pub struct RetryState {
    pub uuid: u64,
    pub attempts_made: u32,
    pub max_attempts: u32,
    pub ack_timeout_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryDecision {
    Resend,
    GiveUp,
}

impl RetryState {
    pub fn new(uuid: u64, max_attempts: u32, ack_timeout_ms: u64) -> Self {
        assert!(max_attempts >= 1);
        Self {
            uuid,
            attempts_made: 0,
            max_attempts,
            ack_timeout_ms,
        }
    }

    pub fn record_attempt(&mut self) {
        self.attempts_made += 1;
    }

    pub fn on_timeout(&self) -> RetryDecision {
        if self.attempts_made >= self.max_attempts {
            RetryDecision::GiveUp
        } else {
            RetryDecision::Resend
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn profiles_match_table() {
        let gprs = NetworkProfile::by_name("GPRS").unwrap();
        assert_eq!((gprs.latency_ms, gprs.bandwidth_kbit), (500, 50));
        assert_eq!(gprs.loss_percent, 2.0);
        let wifi = NetworkProfile::by_name("WIFI").unwrap();
        assert_eq!((wifi.latency_ms, wifi.bandwidth_kbit), (40, 30_000));
        assert!(NetworkProfile::by_name("LTE").is_none());
    }

    #[test]
    fn one_segment_under_gprs_delivers_once_at_formula_time() {
        let profile = NetworkProfile::new("GPRS0", 500, 50, 0.0);
        let bytes = vec![0xAB; 100];
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let plan = plan_delivery(&bytes, 7, &profile, 1000, &mut rng);
        assert_eq!(plan.len(), 1);
        let wire = plan[0].1.wire_size();
        assert_eq!(plan[0].0, 1000 + 500 + (wire as u64 * 8).div_ceil(50));
    }

    #[test]
    fn certain_loss_delivers_nothing() {
        let profile = NetworkProfile::new("DEAD", 10, 100, 100.0);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        assert!(plan_delivery(&[1, 2, 3], 1, &profile, 0, &mut rng).is_empty());
    }

    #[test]
    fn loss_rate_monte_carlo() {
        // iota = 2%: delivered fraction of 10000 single-segment sends must
        // land within +-1% of 0.98 under a fixed seed.
        let profile = NetworkProfile::new("L2", 0, 1000, 2.0);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut delivered = 0u32;
        for uuid in 0..10_000u64 {
            delivered += plan_delivery(&[0u8; 50], uuid, &profile, 0, &mut rng).len() as u32;
        }
        let fraction = delivered as f64 / 10_000.0;
        assert!((fraction - 0.98).abs() < 0.01, "fraction {fraction}");
    }

    #[test]
    fn segment_counts() {
        assert_eq!(segment(1, &[0u8; 100]).len(), 1);
        assert_eq!(segment(1, &[0u8; 300]).len(), 3);
        assert_eq!(segment(1, &[]).len(), 1);
    }

    #[test]
    fn shuffled_reassembly_is_identity() {
        let bytes: Vec<u8> = (0..=255u8).cycle().take(300).collect();
        let mut segs = segment(9, &bytes);
        segs.reverse();
        assert_eq!(reassemble(&segs).unwrap(), bytes);
    }

    #[test]
    fn missing_segment_is_incomplete() {
        let bytes = vec![1u8; 300];
        let mut segs = segment(9, &bytes);
        segs.remove(1);
        assert_eq!(reassemble(&segs), Err(SmsError::BadSegments));
        // The reassembler keeps waiting rather than delivering.
        let mut r = Reassembler::new();
        for seg in segs {
            assert!(r.offer(seg).is_none());
        }
    }

    #[test]
    fn reassembler_dedups_uuid_across_retries() {
        let bytes = vec![7u8; 10];
        let mut r = Reassembler::new();
        let segs = segment(42, &bytes);
        assert_eq!(r.offer(segs[0].clone()), Some(bytes));
        // Retried copy of the same uuid is swallowed.
        assert_eq!(r.offer(segs[0].clone()), None);
    }

    #[test]
    fn retry_state_decisions() {
        let mut s = RetryState::new(1, 3, 500);
        s.record_attempt();
        assert_eq!(s.on_timeout(), RetryDecision::Resend);
        s.record_attempt();
        s.record_attempt();
        assert_eq!(s.on_timeout(), RetryDecision::GiveUp);
    }

    #[test]
    fn packet_round_trip() {
        let packet = SmsPacket {
            uuid: 99,
            mobile: "+100000001".into(),
            content: PacketContent {
                kind: PacketKind::OffChainPay,
                dest_address: "aa".repeat(20),
                amount: 10,
                nonce: 1,
                data: vec![],
            },
            sender_address: "bb".repeat(20),
            signature: ClientSignature(vec![0u8; 64]),
            timestamp: 12345,
        };
        let decoded = SmsPacket::from_bytes(&packet.to_bytes()).unwrap();
        assert_eq!(decoded, packet);
    }
}
